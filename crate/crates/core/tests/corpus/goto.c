int main(int n) {
    int i = 0;
    int s = 0;
    __label__ top, done;
top:
    if (i >= (n & 15)) goto done;
    s = s + i * i;
    i++;
    goto top;
done:
    emit(i);
    return s;
}
