#include "ted4/cli.hpp"

int main(int argc, char** argv) { return ted4::cli::run(argc, argv); }
