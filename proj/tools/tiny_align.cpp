#include "tinyalign/cliapp.hpp"

int main(int argc, char** argv) { return tinyalign::run_command(argc, argv); }
