fn main() {
    println!("cgibnet CLI placeholder");
}
