#include <iostream>

int main() {
    std::cout << "mbpp cli placeholder\n";
    return 0;
}
