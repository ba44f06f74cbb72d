#include "boxoffice/cli.hpp"

int main(int argc, char** argv) { return boxoffice::run(argc, argv); }
