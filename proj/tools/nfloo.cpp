#include "nfloo/cli.hpp"

int main(int argc, char** argv) { return nfloo::cli::run(argc, argv); }
