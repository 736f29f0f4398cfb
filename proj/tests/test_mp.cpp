#include <catch2/catch_amalgamated.hpp>
#include <svoc/svoc.hpp>
