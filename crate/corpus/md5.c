#include <stdio.h>
#include <stdint.h>
#include <string.h>

static const uint32_t shifts[64] = {
	7, 12, 17, 22, 7, 12, 17, 22, 7, 12, 17, 22, 7, 12, 17, 22,
	5, 9, 14, 20, 5, 9, 14, 20, 5, 9, 14, 20, 5, 9, 14, 20,
	4, 11, 16, 23, 4, 11, 16, 23, 4, 11, 16, 23, 4, 11, 16, 23,
	6, 10, 15, 21, 6, 10, 15, 21, 6, 10, 15, 21, 6, 10, 15, 21
};

static const uint32_t sines[64] = {
	0xd76aa478, 0xe8c7b756, 0x242070db, 0xc1bdceee, 0xf57c0faf, 0x4787c62a, 0xa8304613, 0xfd469501,
	0x698098d8, 0x8b44f7af, 0xffff5bb1, 0x895cd7be, 0x6b901122, 0xfd987193, 0xa679438e, 0x49b40821,
	0xf61e2562, 0xc040b340, 0x265e5a51, 0xe9b6c7aa, 0xd62f105d, 0x02441453, 0xd8a1e681, 0xe7d3fbc8,
	0x21e1cde6, 0xc33707d6, 0xf4d50d87, 0x455a14ed, 0xa9e3e905, 0xfcefa3f8, 0x676f02d9, 0x8d2a4c8a,
	0xfffa3942, 0x8771f681, 0x6d9d6122, 0xfde5380c, 0xa4beea44, 0x4bdecfa9, 0xf6bb4b60, 0xbebfbc70,
	0x289b7ec6, 0xeaa127fa, 0xd4ef3085, 0x04881d05, 0xd9d4d039, 0xe6db99e5, 0x1fa27cf8, 0xc4ac5665,
	0xf4292244, 0x432aff97, 0xab9423a7, 0xfc93a039, 0x655b59c3, 0x8f0ccc92, 0xffeff47d, 0x85845dd1,
	0x6fa87e4f, 0xfe2ce6e0, 0xa3014314, 0x4e0811a1, 0xf7537e82, 0xbd3af235, 0x2ad7d2bb, 0xeb86d391
};

static uint32_t rotl(uint32_t x, uint32_t c) {
	return (x << c) | (x >> (32 - c));
}

static void digest_block(const uint8_t *block, uint32_t *state) {
	uint32_t words[16];
	for (int w = 0; w < 16; w++) {
		words[w] = block[w * 4] | (block[w * 4 + 1] << 8) | (block[w * 4 + 2] << 16) | ((uint32_t)block[w * 4 + 3] << 24);
	}
	uint32_t a = state[0], b = state[1], c = state[2], d = state[3];
	for (uint32_t r = 0; r < 64; r++) {
		uint32_t f, g;
		if (r < 16) { f = (b & c) | (~b & d); g = r; }
		else if (r < 32) { f = (d & b) | (~d & c); g = (5 * r + 1) % 16; }
		else if (r < 48) { f = b ^ c ^ d; g = (3 * r + 5) % 16; }
		else { f = c ^ (b | ~d); g = (7 * r) % 16; }
		uint32_t tmp = d;
		d = c;
		c = b;
		b = b + rotl(a + f + sines[r] + words[g], shifts[r]);
		a = tmp;
	}
	state[0] += a; state[1] += b; state[2] += c; state[3] += d;
}

void md5_hash(const uint8_t *msg, size_t len, uint8_t *out) {
	uint32_t state[4] = {0x67452301, 0xefcdab89, 0x98badcfe, 0x10325476};
	uint8_t buf[128];
	size_t off = 0;
	for (; off + 64 <= len; off += 64) digest_block(msg + off, state);
	size_t rest = len - off;
	memset(buf, 0, sizeof(buf));
	memcpy(buf, msg + off, rest);
	buf[rest] = 0x80;
	size_t total = rest < 56 ? 64 : 128;
	uint64_t bits = (uint64_t)len * 8;
	for (int k = 0; k < 8; k++) buf[total - 8 + k] = (uint8_t)(bits >> (8 * k));
	for (size_t blk = 0; blk < total; blk += 64) digest_block(buf + blk, state);
	for (int k = 0; k < 16; k++) out[k] = (uint8_t)(state[k / 4] >> (8 * (k % 4)));
}

int main(int argc, char **argv) {
	if (argc < 2) return 1;
	uint8_t hash[16];
	md5_hash((const uint8_t *)argv[1], strlen(argv[1]), hash);
	for (int k = 0; k < 16; k++) printf("%02x", hash[k]);
	printf("\n");
	return 0;
}
