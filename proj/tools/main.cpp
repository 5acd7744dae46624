#include "scenepose/cli.hpp"

int main(int argc, char** argv) { return scenepose::cli_main(argc, argv); }
