int is_odd(int n);

int is_even(int n) {
    if (n == 0) return 1;
    return is_odd(n - 1);
}

int is_odd(int n) {
    if (n == 0) return 0;
    return is_even(n - 1);
}

int main(int n) {
    int m = n & 15;
    emit(is_odd(m));
    return is_even(m);
}
