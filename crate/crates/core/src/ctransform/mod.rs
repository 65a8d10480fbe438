//! C tokenization, rename-site discovery, and seeded randomization.

mod lexer;
mod names;
mod randomize;
mod sites;

pub use lexer::{concat, is_keyword, literal_body, tokenize_c, LexError, Token, TokenKind, KEYWORDS};
pub use names::{fresh_name, is_reserved, NameKind};
pub use randomize::{
    randomize, randomize_value, Derivation, ProgramInstance, RandomizeError, ResolvedFact, ValueReplacement,
};
pub use sites::{classify_literal, code_token_indices, collect_rename_sites, parse_c_float, parse_c_int, RenameSites, ValueKind, ValueSite};
