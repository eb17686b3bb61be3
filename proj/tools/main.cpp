#include <cstdio>

int main() {
  std::puts("tactsynth: CLI under construction");
  return 0;
}
