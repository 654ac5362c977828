#include <cstdio>

int main() {
    std::printf("lipsync cli placeholder\n");
    return 0;
}
