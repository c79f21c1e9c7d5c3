#include "dentnet/cli.hpp"

int main(int argc, char** argv) { return dentnet::run_cli(argc, argv); }
