unsigned long long main(long long v) {
    signed char a = (signed char)v;
    unsigned short b = (unsigned short)a;
    float c = (float)b;
    long d = (long)c;
    _Bool e = (_Bool)d;
    double f = (double)v;
    unsigned int g = (unsigned int)f;
    short h = (short)g;
    unsigned char i = (unsigned char)h;
    unsigned long j = (unsigned long)i;
    emit(a);
    emit(b);
    emit(c);
    emit(d);
    emit(e);
    emit(f);
    emit(g);
    emit(h);
    emit(i);
    emit(j);
    return (unsigned long long)j + (unsigned long long)e;
}
