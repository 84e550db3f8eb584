#include "mutualhold/cli.hpp"

int main(int argc, char** argv) { return mutualhold::cli::run(argc, argv); }
