use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Mean absolute difference.
pub fn l1_loss(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Dimension(format!(
            "l1_loss: shapes {:?} and {:?} differ",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    let d = tape.sub(a, b)?;
    let ad = tape.abs(d);
    Ok(tape.mean(ad))
}
