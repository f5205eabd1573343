#include "corrshift/harness.hpp"

int main(int argc, char** argv) { return corrshift::cli_dispatch(argc, argv); }
