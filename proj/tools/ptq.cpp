#include "cli.hpp"

int main(int argc, char** argv) { return ptq::cli::run(argc, argv); }
