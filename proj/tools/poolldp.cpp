#include <poolldp/cli.hpp>

int main(int argc, char** argv) { return poolldp::cli::run(argc, argv); }
