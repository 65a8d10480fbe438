use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lexer::is_keyword;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameKind {
    Function,
    Variable,
    Define,
}

/// Identifiers that headers commonly declare or define as macros, plus names
/// that newer C standards or GNU mode treat as keywords. A fresh name must not
/// land on one of these or the instance may stop compiling.
const RESERVED: &[&str] = &[
    // keywords in C23 / GNU mode
    "bool", "true", "false", "nullptr", "constexpr", "typeof", "alignas", "alignof", "noreturn",
    "complex", "imaginary", "fortran",
    // predefined and header macros
    "linux", "unix", "stdin", "stdout", "stderr", "errno", "assert", "major", "minor", "makedev",
    "alloca", "offsetof", "environ", "howmany", "roundup", "setbit", "clrbit", "isset", "isclr",
    "nitems", "va", "DIR", "FILE", "EOF", "NULL", "NAN", "BUFSIZ", "INFINITY",
    // stdio / stdlib / string
    "printf", "fprintf", "sprintf", "snprintf", "dprintf", "scanf", "fscanf", "sscanf", "puts",
    "gets", "fgets", "fputs", "getc", "putc", "fgetc", "fputc", "getchar", "putchar", "ungetc",
    "fopen", "fclose", "fread", "fwrite", "fseek", "ftell", "rewind", "feof", "ferror", "fflush",
    "freopen", "fdopen", "fileno", "perror", "remove", "rename", "tmpfile", "tmpnam", "setbuf",
    "setvbuf", "getline", "getdelim", "popen", "pclose", "malloc", "calloc", "realloc", "free",
    "abort", "exit", "atexit", "system", "getenv", "setenv", "unsetenv", "putenv", "abs", "labs",
    "div", "ldiv", "atoi", "atol", "atof", "rand", "srand", "random", "srandom", "qsort",
    "bsearch", "mkstemp", "mktemp", "realpath", "index", "rindex", "bcopy", "bzero", "bcmp",
    "ffs", "strdup", "strndup",
    // unistd / fcntl / sys
    "read", "write", "open", "close", "creat", "lseek", "unlink", "link", "symlink", "rmdir",
    "mkdir", "chdir", "fchdir", "getcwd", "access", "dup", "pipe", "fork", "vfork", "execl",
    "execle", "execlp", "execv", "execve", "execvp", "wait", "waitpid", "kill", "sleep",
    "usleep", "alarm", "pause", "getpid", "getppid", "getuid", "geteuid", "getgid", "setuid",
    "setgid", "setsid", "chown", "chmod", "umask", "sync", "nice", "truncate", "ftruncate",
    "isatty", "ttyname", "daemon", "ioctl", "fcntl", "mmap", "munmap", "stat", "fstat",
    "lstat", "utime", "select", "poll", "signal", "raise", "sigaction", "crypt", "encrypt",
    "setkey", "optarg", "optind", "opterr", "optopt", "getopt", "syscall", "brk", "sbrk",
    "chroot", "readlink", "gethostname", "sethostname", "getlogin",
    // dirent / socket / netdb / arpa
    "opendir", "readdir", "closedir", "rewinddir", "seekdir", "telldir", "dirfd", "scandir",
    "alphasort", "dirent", "socket", "bind", "listen", "accept", "connect", "send", "recv",
    "sendto", "recvfrom", "sendmsg", "recvmsg", "shutdown", "setsockopt", "getsockopt",
    "getsockname", "getpeername", "socketpair", "htons", "htonl", "ntohs", "ntohl",
    "gethostbyname", "gethostbyaddr", "getaddrinfo", "freeaddrinfo", "sockaddr", "hostent",
    "servent", "protoent", "linger", "iovec", "msghdr", "pollfd", "timeval", "timespec",
    "passwd", "group", "tm", "tms", "sigset", "sigval", "utsname", "rusage", "rlimit",
    // time / math
    "time", "clock", "ctime", "gmtime", "localtime", "mktime", "difftime", "asctime",
    "strftime", "timezone", "daylight", "tzname", "tzset", "sin", "cos", "tan", "asin", "acos",
    "atan", "atan2", "sinh", "cosh", "tanh", "exp", "exp2", "log", "log10", "log2", "pow",
    "sqrt", "cbrt", "hypot", "ceil", "floor", "fabs", "fmod", "frexp", "ldexp", "modf",
    "round", "trunc", "lround", "fmin", "fmax", "fma", "nan", "erf", "erfc", "gamma",
    "lgamma", "tgamma", "drem", "significand", "copysign", "nearbyint", "rint", "lrint",
    "remainder", "scalb", "logb", "expm", "signbit", "isnan", "isinf",
];

/// Prefixes reserved for future library use (ctype, string, wide-char).
const RESERVED_PREFIXES: &[&str] = &["is", "to", "str", "mem", "wcs"];

pub fn is_reserved(name: &str) -> bool {
    if is_keyword(name) || RESERVED.contains(&name) {
        return true;
    }
    let lower_prefix = RESERVED_PREFIXES
        .iter()
        .any(|p| name.len() > p.len() && name.starts_with(p));
    // errno macros: E followed by an uppercase letter or digit
    let errno_like = name.len() > 1
        && name.starts_with('E')
        && name.as_bytes()[1].is_ascii_uppercase();
    lower_prefix || errno_like
}

/// Draws a random identifier of the given kind that is not a keyword, not
/// reserved, and not in `taken`. The returned name is added to `taken`.
pub fn fresh_name<R: Rng + ?Sized>(kind: NameKind, rng: &mut R, taken: &mut HashSet<String>) -> String {
    loop {
        let name = match kind {
            NameKind::Function | NameKind::Variable => {
                let len = rng.random_range(2..=11);
                (0..len).map(|_| char::from(rng.random_range(b'a'..=b'z'))).collect::<String>()
            }
            NameKind::Define => {
                let len = rng.random_range(3..=6);
                (0..len).map(|_| char::from(rng.random_range(b'A'..=b'Z'))).collect::<String>()
            }
        };
        if is_reserved(&name) || taken.contains(&name) {
            continue;
        }
        taken.insert(name.clone());
        return name;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn define_names_are_uppercase_3_to_6() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut taken = HashSet::new();
        for _ in 0..500 {
            let n = fresh_name(NameKind::Define, &mut rng, &mut taken);
            assert!((3..=6).contains(&n.len()), "{n}");
            assert!(n.bytes().all(|b| b.is_ascii_uppercase()));
        }
    }

    #[test]
    fn function_names_are_lowercase_2_to_11() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut taken = HashSet::new();
        let mut lens = HashSet::new();
        for _ in 0..2000 {
            let n = fresh_name(NameKind::Function, &mut rng, &mut taken);
            assert!((2..=11).contains(&n.len()), "{n}");
            assert!(n.bytes().all(|b| b.is_ascii_lowercase()));
            lens.insert(n.len());
        }
        assert_eq!(lens.len(), 10, "every length in 2..=11 should occur");
    }

    #[test]
    fn ten_thousand_draws_never_collide_or_hit_keywords() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let mut taken: HashSet<String> = ["dirname", "main", "buffer"].iter().map(|s| s.to_string()).collect();
        let preexisting = taken.clone();
        let mut issued = Vec::new();
        for i in 0..10_000 {
            let kind = [NameKind::Function, NameKind::Variable, NameKind::Define][i % 3];
            issued.push(fresh_name(kind, &mut rng, &mut taken));
        }
        let unique: HashSet<&String> = issued.iter().collect();
        assert_eq!(unique.len(), issued.len());
        for n in &issued {
            assert!(!is_keyword(n), "{n}");
            assert!(!is_reserved(n), "{n}");
            assert!(!preexisting.contains(n), "{n}");
        }
    }

    #[test]
    fn reserved_patterns() {
        assert!(is_reserved("printf"));
        assert!(is_reserved("isfoo"));
        assert!(is_reserved("strx"));
        assert!(is_reserved("EDOM"));
        assert!(is_reserved("while"));
        assert!(!is_reserved("is"));
        assert!(!is_reserved("xheekxwdkm"));
        assert!(!is_reserved("ZJKP"));
    }
}
