#include "cli.hpp"

int main(int argc, char** argv)
{
    return mpipe::cli::dispatch(argc, argv);
}
