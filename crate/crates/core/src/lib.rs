//! Quantized controller synthesis for discrete time linear hybrid systems.
//!
//! Pipeline: a [`models::Dtlhs`] is quantized ([`quantization`]), abstracted
//! into a finite transition system by MILP queries ([`abstraction`]), solved
//! for a safe-and-live controller ([`synthesis`]), compiled into a decision
//! tree ([`codegen`]) and validated in closed loop ([`simulator`]).

pub mod abstraction;
pub mod codegen;
pub mod milp;
pub mod models;
pub mod predicate;
pub mod quantization;
pub mod simulator;
pub mod synthesis;
