#include <cstdio>

int main() {
  std::puts("sdbnav: placeholder");
  return 0;
}
