int main(int i, int v) {
    int a[100];
    int k;
    int s = 0;
    a[i & 63] = v;
    a[99] = v + 1;
    for (k = 0; k < 100; k += 9) s += a[k];
    emit(a[i & 63]);
    return s + a[99];
}
