#include "cli.hpp"

int main(int argc, char** argv) { return focusgate::cli::run(argc, argv); }
