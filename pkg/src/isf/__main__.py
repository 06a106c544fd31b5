from isf.cli import main

main()
