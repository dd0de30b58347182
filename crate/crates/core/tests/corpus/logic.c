int main(int a, int b, int c) {
    int x = (a > 0 && b > 0) || c == 0;
    int y = !(a == b) ? a - b : c;
    int z = a < b ? (b < c ? 1 : 2) : 3;
    emit(x);
    emit(y);
    emit(z);
    emit(!a);
    if ((a & 1) && (b & 1)) return 1;
    if ((a & 1) || (b & 1)) return 2;
    return x + y + z;
}
