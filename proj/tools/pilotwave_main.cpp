#include <cstdio>

// placeholder; real CLI lands with the runner module
int main() {
  std::puts("pilotwave: scenario runner not wired yet");
  return 2;
}
