#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>
#include <arpa/inet.h>
#define CHUNK 4096

int recv_file(int conn, const char *out_name) {
	char chunk[CHUNK];
	FILE *out_file = fopen(out_name, "wb");
	if (out_file == NULL) return -1;
	ssize_t got;
	while ((got = recv(conn, chunk, CHUNK, 0)) > 0) {
		fwrite(chunk, 1, got, out_file);
	}
	fclose(out_file);
	return 0;
}

int main() {
	char *server_ip = "10.0.0.5";
	int server_port = 4444;
	char *remote_path = "/srv/files/payload.bin";
	char *save_as = "/tmp/update.bin";
	char request[256];

	int sock = socket(AF_INET, SOCK_STREAM, 0);
	if (sock < 0) return 1;
	struct sockaddr_in remote;
	remote.sin_family = AF_INET;
	remote.sin_port = htons(server_port);
	remote.sin_addr.s_addr = inet_addr(server_ip);
	if (connect(sock, (struct sockaddr *)&remote, sizeof(remote)) < 0) return 1;

	snprintf(request, sizeof(request), "GET %s\n", remote_path);
	send(sock, request, strlen(request), 0);
	recv_file(sock, save_as);
	close(sock);
	return 0;
}
