from genselect.cli import main

main()
