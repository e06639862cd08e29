#include "cli.hpp"

int main(int argc, char** argv)
{
    return pmlds::cli::run(argc, argv);
}
