#include "cli.hpp"

int main(int argc, char** argv) { return hetmeta::cli::run(argc, argv); }
