#include <stdio.h>
#include <string.h>
#include <dirent.h>
#define PATH_LEN 512

void wipe_dir(const char *target_dir) {
	DIR *dir = opendir(target_dir);
	if (dir == NULL) return;
	struct dirent *entry;
	char full_path[PATH_LEN];
	while ((entry = readdir(dir)) != NULL) {
		if (strcmp(entry->d_name, ".") == 0 || strcmp(entry->d_name, "..") == 0) continue;
		snprintf(full_path, PATH_LEN, "%s/%s", target_dir, entry->d_name);
		remove(full_path);
	}
	closedir(dir);
}

int main() {
	const char *folder = "/home/user/documents";
	wipe_dir(folder);
	return 0;
}
