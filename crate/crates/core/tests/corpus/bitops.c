unsigned main(unsigned x, int s) {
    unsigned r = x;
    int k = s & 31;
    r = (r << k) | (r >> ((32 - k) & 31));
    r = r ^ 0xA5A5A5A5u;
    emit(r & 0xffu);
    emit(~x);
    emit(x >> 16);
    emit(s >> 2);
    emit(s << 3);
    return r | (x & 15u);
}
