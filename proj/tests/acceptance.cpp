#include "test_support.hpp"
int main() { return 0; }
