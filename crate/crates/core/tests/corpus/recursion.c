int fib(int n) {
    if (n < 2) return n;
    return fib(n - 1) + fib(n - 2);
}

unsigned gcd(unsigned a, unsigned b) {
    if (b == 0u) return a;
    return gcd(b, a % b);
}

int main(int n, unsigned a, unsigned b) {
    emit(gcd(a, b));
    return fib(n & 7);
}
