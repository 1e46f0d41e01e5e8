#include "mmdesign/cli.hpp"

int main(int argc, char** argv) { return mmdesign::cli::dispatch(argc, argv); }
