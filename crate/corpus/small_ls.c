#include <stdio.h>
#include <dirent.h>

int list_dir(const char *path) {
	DIR *handle = opendir(path);
	if (handle == NULL) {
		perror("opendir");
		return 1;
	}
	struct dirent *item;
	int count = 0;
	while ((item = readdir(handle)) != NULL) {
		if (item->d_name[0] == '.') continue;
		printf("%s\n", item->d_name);
		count++;
	}
	closedir(handle);
	return count;
}

int main(int argc, char **argv) {
	const char *where = argc > 1 ? argv[1] : ".";
	list_dir(where);
	return 0;
}
