fn main() {
    println!("gtn");
}
