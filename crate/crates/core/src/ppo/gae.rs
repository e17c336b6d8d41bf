use super::PpoError;

/// Generalized advantage estimates and returns for one uninterrupted segment.
///
/// `delta_t = r_t + gamma * V(s_{t+1}) - V(s_t)` with `V(s_T) = bootstrap`;
/// `A_t = sum_l (gamma * lambda)^l * delta_{t+l}`; `return_t = A_t + V(s_t)`.
/// No terminal masking: the task never ends, truncation bootstraps.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    if rewards.len() != values.len() {
        return Err(PpoError::Length(format!(
            "{} rewards but {} values",
            rewards.len(),
            values.len()
        )));
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}
