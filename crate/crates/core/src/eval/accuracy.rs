use crate::data::{Batch, StRecord};
use crate::model::{Mode, ModelError, TcenModel};
use crate::numerics::Tape;

/// Teacher-forced top-1 accuracy over every non-pad target position
/// (end-of-sentence included) of an ST set.
pub fn token_accuracy(model: &TcenModel, dev: &[StRecord], batch_size: usize) -> Result<f64, ModelError> {
    if dev.is_empty() {
        return Err(ModelError::EmptyInput("dev set"));
    }
    let (mut correct, mut total) = (0usize, 0usize);
    for chunk in dev.chunks(batch_size.max(1)) {
        let refs: Vec<&StRecord> = chunk.iter().collect();
        let batch = Batch::st(&refs);
        let mut tape = Tape::new();
        let mut mode = Mode::eval();
        let frames = batch.frames.as_ref().expect("st batch carries frames");
        let mem = model.st_encode(&mut tape, frames, &mut mode)?;
        let tf = model.teacher_force(&mut tape, &mem, batch.target.as_ref().expect("st batch carries targets"), &mut mode)?;
        correct += tf.correct;
        total += tf.tokens;
    }
    Ok(correct as f64 / total as f64)
}
