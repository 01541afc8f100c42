//! Per-utterance mask plots: one row per speaker, the reference activity as
//! a filled band and the predicted probabilities as a polyline over it.
//! Plain hand-rolled SVG — the point is a quick visual check, not a chart
//! library.

use std::collections::BTreeMap;

use spkmask::signal::MaskVector;
use spkmask::Scalar;

const ROW_H: f64 = 60.0;
const ROW_PAD: f64 = 14.0;
const LEFT: f64 = 70.0;
const WIDTH: f64 = 640.0;

/// Rows appear in `reference` order (speaker id sorted); each is paired with
/// the prediction of the same FIFO rank, which is how label speaker indices
/// line up with reference speakers on in-order decodes.
pub fn mask_plot<T: Scalar>(
    utt_id: &str,
    reference: &BTreeMap<String, MaskVector<T>>,
    predicted: &BTreeMap<usize, MaskVector<T>>,
) -> String {
    let rows = reference.len().max(predicted.len());
    let height = rows as f64 * (ROW_H + ROW_PAD) + 40.0;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\" \
         viewBox=\"0 0 {} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        LEFT + WIDTH + 20.0,
        LEFT + WIDTH + 20.0,
    ));
    svg.push_str(&format!("<text x=\"8\" y=\"16\">{utt_id}</text>\n"));

    let mut ref_rows = reference.iter();
    for row in 0..rows {
        let top = 30.0 + row as f64 * (ROW_H + ROW_PAD);
        let base = top + ROW_H;
        let reference = ref_rows.next();
        let predicted = predicted.get(&(row + 1));
        let label = match reference {
            Some((name, _)) => name.clone(),
            None => format!("(pred {})", row + 1),
        };
        svg.push_str(&format!(
            "<text x=\"8\" y=\"{:.1}\">{label}</text>\n",
            top + ROW_H / 2.0
        ));
        svg.push_str(&format!(
            "<rect x=\"{LEFT}\" y=\"{top:.1}\" width=\"{WIDTH}\" height=\"{ROW_H}\" \
             fill=\"none\" stroke=\"#999\"/>\n"
        ));
        let frames = reference
            .map(|(_, m)| m.len())
            .into_iter()
            .chain(predicted.map(|m| m.len()))
            .max()
            .unwrap_or(0);
        if frames == 0 {
            continue;
        }
        let x = |f: usize| LEFT + f as f64 / frames as f64 * WIDTH;
        if let Some((_, mask)) = reference {
            for (start, len) in mask.runs() {
                svg.push_str(&format!(
                    "<rect x=\"{:.2}\" y=\"{top:.1}\" width=\"{:.2}\" height=\"{ROW_H}\" \
                     fill=\"#8bc34a\" fill-opacity=\"0.45\"/>\n",
                    x(start),
                    x(start + len) - x(start),
                ));
            }
        }
        if let Some(mask) = predicted {
            let pts: Vec<String> = mask
                .values()
                .iter()
                .enumerate()
                .map(|(f, v)| format!("{:.2},{:.2}", x(f), base - v.to_f() * ROW_H))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#d32f2f\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_holds_one_row_per_speaker_with_band_and_line() {
        let mut reference = BTreeMap::new();
        reference.insert(
            "spk0".to_string(),
            MaskVector::<f64>::binary(vec![1.0, 1.0, 0.0, 0.0]).unwrap(),
        );
        reference.insert(
            "spk1".to_string(),
            MaskVector::<f64>::binary(vec![0.0, 0.0, 1.0, 1.0]).unwrap(),
        );
        let mut predicted = BTreeMap::new();
        predicted
            .insert(1, MaskVector::<f64>::probability(vec![0.9, 0.8, 0.1, 0.2]).unwrap());
        let svg = mask_plot("mix-0", &reference, &predicted);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("mix-0"));
        assert!(svg.contains("spk0"));
        assert!(svg.contains("spk1"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.matches("fill=\"#8bc34a\"").count() >= 2);
    }

    #[test]
    fn empty_masks_still_render_a_frame() {
        let svg = mask_plot::<f64>("empty", &BTreeMap::new(), &BTreeMap::new());
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
