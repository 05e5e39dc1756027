#include "nlfem/cli_runner.hpp"

int main(int argc, char** argv) { return nlfem::cli_main(argc, argv); }
