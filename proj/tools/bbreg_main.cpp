#include "bbreg/cli.hpp"

int main(int argc, char** argv) { return bbreg::main_entry(argc, argv); }
