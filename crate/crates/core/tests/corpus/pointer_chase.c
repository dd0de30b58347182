int next[8];
int val[8];

int main(int start, int steps) {
    int i;
    int p;
    int s = 0;
    for (i = 0; i < 8; i++) {
        next[i] = (i * 5 + 3) & 7;
        val[i] = i * i + start;
    }
    p = start & 7;
    for (i = 0; i < (steps & 15); i++) {
        s = s + val[p];
        val[p] = s;
        p = next[p];
    }
    emit(p);
    return s;
}
