int main(int seed, int n) {
    int a[8];
    int i;
    int j;
    int x = seed;
    for (i = 0; i < 8; i++) {
        x = x * 1103515245 + 12345;
        a[i] = (x >> 16) & 255;
    }
    for (i = 0; i < 8; i++) {
        for (j = 0; j + 1 < 8 - i; j++) {
            if (a[j] > a[j + 1]) {
                int t = a[j];
                a[j] = a[j + 1];
                a[j + 1] = t;
            }
        }
    }
    for (i = 0; i < 8; i++) emit(a[i]);
    return a[n & 7];
}
