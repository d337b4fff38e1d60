#include "cerase/cli.hpp"

int main(int argc, char** argv) { return cerase::cli::main(argc, argv); }
