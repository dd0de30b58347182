struct pt { int x; double w; short tag; };

int main(int i, int v) {
    struct pt ps[4];
    int k;
    for (k = 0; k < 4; k++) {
        ps[k].x = k * v;
        ps[k].w = k * 0.5;
        ps[k].tag = k + 100;
    }
    ps[i & 3].x = ps[i & 3].x + 7;
    ps[(i + 1) & 3].tag = 70000;
    emit(ps[0].x);
    emit(ps[1].w);
    emit(ps[(i + 1) & 3].tag);
    return ps[i & 3].x + ps[2].tag;
}
