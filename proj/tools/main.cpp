#include "scribbleseg/cli.hpp"

int main(int argc, char** argv) { return scribbleseg::run_cli(argc, argv); }
