#include "fedtcd/cli.hpp"

int main(int argc, char** argv) { return fedtcd::run_cli(argc, argv); }
