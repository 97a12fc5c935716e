#include "dcvit/cli.hpp"

int main(int argc, char** argv) { return dcvit::dispatch(argc, argv); }
