#include "lucca/harness.hpp"

int main(int argc, char** argv) { return lucca::run_cli(argc, argv); }
