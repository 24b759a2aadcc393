// Compiles and runs the guide's code samples as doc-tests so the book
// cannot drift from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
struct _Introduction;

#[doc = include_str!("../../../book/src/model.md")]
struct _Model;

#[doc = include_str!("../../../book/src/fitting.md")]
struct _Fitting;

#[doc = include_str!("../../../book/src/generating.md")]
struct _Generating;

#[doc = include_str!("../../../book/src/replaying.md")]
struct _Replaying;

#[doc = include_str!("../../../book/src/cli.md")]
struct _Cli;

#[doc = include_str!("../../../book/src/formats.md")]
struct _Formats;
