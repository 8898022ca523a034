#include <cstdio>
int main() { std::puts("coconv"); return 0; }
