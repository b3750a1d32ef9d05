#include <doctest.h>

TEST_SUITE_BEGIN("unlearn");
TEST_SUITE_END();
