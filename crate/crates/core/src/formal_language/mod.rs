//! Text formats produced by visual transcription: geometry facts and LaTeX
//! tables.

mod facts;
mod latex;

pub use facts::{
    parse_facts, serialize_facts, validate_arity, Arg, ArityTable, ArityTableError, ArityViolation,
    Decimal, Expected, FactList, GeometryFact, ParseError,
};
pub use latex::{check_latex_table, TableFinding, TableReport, TableShape};
