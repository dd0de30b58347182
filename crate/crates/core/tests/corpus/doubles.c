double poly(double x) {
    return ((0.5 * x - 2.0) * x + 3.25) * x - 1.0;
}

double main(double x, int n) {
    double acc = 0.0;
    int i;
    for (i = 0; i < (n & 7); i++) {
        acc = acc + poly(x + i);
    }
    emit(acc);
    emit(x / 3.0);
    if (acc >= x) return acc - x;
    return -acc;
}
