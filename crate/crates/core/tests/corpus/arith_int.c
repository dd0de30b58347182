int main(int a, int b) {
    int s = a + b;
    int d = a - b;
    int p = a * b;
    int q = 0;
    int r = 0;
    if (b != 0) {
        q = a / b;
        r = a % b;
    }
    emit(s);
    emit(d);
    emit(p);
    emit(q);
    emit(r);
    return s * 3 - d / 7 + (p ^ q);
}
