#include <stdio.h>
#include <string.h>

void xor_crypt(const char *plaintext, unsigned char *ciphertext, size_t len, unsigned char key) {
	for (size_t pos = 0; pos < len; pos++) {
		ciphertext[pos] = plaintext[pos] ^ key;
		key = key + 37;
	}
}

int main(int argc, char **argv) {
	if (argc < 2) return 1;
	unsigned char start_key = 171;
	unsigned char cipher[1024];
	size_t msg_len = strlen(argv[1]);
	if (msg_len > sizeof(cipher)) msg_len = sizeof(cipher);
	xor_crypt(argv[1], cipher, msg_len, start_key);
	for (size_t pos = 0; pos < msg_len; pos++) printf("%02x", cipher[pos]);
	printf("\n");
	return 0;
}
