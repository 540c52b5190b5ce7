#pragma once

#include "config.hpp"
#include "core.hpp"
#include "lbfgs.hpp"
#include "ldp.hpp"
#include "lln.hpp"
#include "riccati.hpp"
#include "simulator.hpp"
#include "variational.hpp"
